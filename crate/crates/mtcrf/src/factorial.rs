//! Factorial CRFs: chains over the same sentence coupled through per-token
//! potentials between task labels.
//!
//! Three couplings are supported. Plain adds C[y_other, y_this] to this
//! task's unary scores. Weighted scales that by the other task's emission
//! score at its own label, so the coupling strength follows the model's
//! confidence. Cascaded is the weighted form restricted to earlier tasks in
//! schema order, which makes one exact decoding pass sufficient.
//!
//! Training clamps coupled tasks to their gold labels, so each task's loss is
//! an exact chain NLL over augmented unaries; no loopy approximation enters
//! the gradients. Decoding without gold labels iterates conditional Viterbi
//! sweeps over the tasks (for plain couplings this ascends the joint score)
//! or, for cascaded couplings, decodes each task once in order.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::chain::{self, ChainHead, EmissionScores};
use crate::corpus::MultiTaskSentence;
use crate::features::{Featurizer, FeaturizerParams};
use crate::math::FlatParams;
use crate::multihead::{ModelError, MultiHeadModel};
use crate::tagset::LabelId;

/// How cross-task potentials enter the unary scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingVariant {
    Plain,
    Weighted,
    Cascaded,
}

/// Decode-loop settings. `damping` and `tolerance` are reserved for a
/// message-passing decoder; the conditional-Viterbi loop uses only
/// `max_iterations`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub max_iterations: usize,
    pub damping: f64,
    pub tolerance: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            max_iterations: 10,
            damping: 0.5,
            tolerance: 1e-4,
        }
    }
}

/// Coupling potentials for one unordered task pair, stored once.
///
/// `c` has shape K_high × K_low: row = task `high`'s label, column = task
/// `low`'s label. Task `low` reads it as-is (rows indexed by the other
/// task); task `high` reads the transpose. The two views therefore always
/// agree on the shared parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCoupling {
    pub low: usize,
    pub high: usize,
    pub c: Array2<f64>,
}

/// Coupled multi-task model: shared featurizer, per-task heads, and one
/// coupling matrix per task pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialModel {
    pub featurizer: Featurizer,
    pub heads: Vec<ChainHead>,
    pub couplings: Vec<PairCoupling>,
    pub variant: CouplingVariant,
    pub bp: BpConfig,
}

/// Gradient mirror of [`FactorialModel`]; flattens in the same order.
#[derive(Debug, Clone)]
pub struct FactorialGradients {
    pub featurizer: FeaturizerParams,
    pub heads: Vec<ChainHead>,
    /// Aligned with `model.couplings`, in stored orientation.
    pub couplings: Vec<Array2<f64>>,
}

fn zero_couplings(ks: &[usize]) -> Vec<PairCoupling> {
    let mut out = Vec::new();
    for low in 0..ks.len() {
        for high in low + 1..ks.len() {
            out.push(PairCoupling {
                low,
                high,
                c: Array2::zeros((ks[high], ks[low])),
            });
        }
    }
    out
}

impl FactorialModel {
    /// Builds a model with zero heads and zero couplings. Couplings start at
    /// zero deliberately: a fresh factorial model scores exactly like the
    /// multi-head baseline until training moves the couplings.
    pub fn new(
        featurizer: Featurizer,
        ks: &[usize],
        variant: CouplingVariant,
        bp: BpConfig,
    ) -> FactorialModel {
        let d = featurizer.hidden_dim();
        FactorialModel {
            featurizer,
            heads: ks.iter().map(|&k| ChainHead::zeros(k, d)).collect(),
            couplings: zero_couplings(ks),
            variant,
            bp,
        }
    }

    /// Wraps existing multi-head parameters with zero couplings.
    pub fn from_multihead(
        mh: MultiHeadModel,
        variant: CouplingVariant,
        bp: BpConfig,
    ) -> FactorialModel {
        let ks: Vec<usize> = mh.heads.iter().map(|h| h.num_labels()).collect();
        FactorialModel {
            featurizer: mh.featurizer,
            heads: mh.heads,
            couplings: zero_couplings(&ks),
            variant,
            bp,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn zero_gradients(&self) -> FactorialGradients {
        FactorialGradients {
            featurizer: self.featurizer.params.zeros_like(),
            heads: self
                .heads
                .iter()
                .map(|h| ChainHead::zeros(h.num_labels(), h.feature_dim()))
                .collect(),
            couplings: self
                .couplings
                .iter()
                .map(|p| Array2::zeros(p.c.raw_dim()))
                .collect(),
        }
    }

    /// Emission scores of every task for one feature matrix.
    pub fn emissions(&self, features: &Array2<f64>) -> Result<Vec<EmissionScores>, ModelError> {
        self.heads
            .iter()
            .map(|h| h.emissions(features).map_err(ModelError::from))
            .collect()
    }

    /// Tasks whose labels feed task j's unary scores.
    fn coupled_tasks(&self, j: usize) -> Vec<usize> {
        match self.variant {
            CouplingVariant::Cascaded => (0..j).collect(),
            _ => (0..self.num_tasks()).filter(|&jh| jh != j).collect(),
        }
    }

    /// Position of the stored coupling for the unordered pair (low, high),
    /// or None when the tasks are equal or out of range.
    pub fn pair_index(&self, low: usize, high: usize) -> Option<usize> {
        self.couplings
            .iter()
            .position(|p| p.low == low && p.high == high)
    }

    fn pair_slot(&self, low: usize, high: usize) -> usize {
        self.pair_index(low, high)
            .expect("coupling exists for every pair")
    }

    /// Coupling potential between task j at label y_j and task jh at y_jh,
    /// read from the shared storage in the orientation task j sees.
    pub fn coupling_value(&self, j: usize, jh: usize, y_jh: LabelId, y_j: LabelId) -> f64 {
        if j < jh {
            self.couplings[self.pair_slot(j, jh)].c[[y_jh, y_j]]
        } else {
            self.couplings[self.pair_slot(jh, j)].c[[y_j, y_jh]]
        }
    }

    /// Multiplier on the coupling row contributed by task jh at position t:
    /// 1 for plain couplings, task jh's emission score at its label otherwise.
    fn pair_weight(
        &self,
        emissions: &[EmissionScores],
        jh: usize,
        t: usize,
        y_jh: LabelId,
    ) -> f64 {
        match self.variant {
            CouplingVariant::Plain => 1.0,
            _ => emissions[jh][[t, y_jh]],
        }
    }

    /// Additive unary scores for task j given the other tasks' labels,
    /// T × K_j. `labels` is indexed by task; entry j is ignored, and for
    /// cascaded couplings only entries before j are read.
    pub fn coupling_unaries_from_scores(
        &self,
        emissions: &[EmissionScores],
        j: usize,
        labels: &[Vec<LabelId>],
    ) -> Result<Array2<f64>, ModelError> {
        let (t_len, k) = emissions[j].dim();
        let mut out = Array2::zeros((t_len, k));
        for jh in self.coupled_tasks(j) {
            let seq = &labels[jh];
            if seq.len() != t_len {
                return Err(ModelError::MissingCoupledLabels {
                    task: jh,
                    expected: t_len,
                    found: seq.len(),
                });
            }
            for t in 0..t_len {
                let w = self.pair_weight(emissions, jh, t, seq[t]);
                for y in 0..k {
                    out[[t, y]] += w * self.coupling_value(j, jh, seq[t], y);
                }
            }
        }
        Ok(out)
    }

    /// [`Self::coupling_unaries_from_scores`] starting from raw features.
    pub fn coupling_unaries(
        &self,
        features: &Array2<f64>,
        j: usize,
        labels: &[Vec<LabelId>],
    ) -> Result<Array2<f64>, ModelError> {
        let emissions = self.emissions(features)?;
        self.coupling_unaries_from_scores(&emissions, j, labels)
    }

    /// Sum over tasks of the chain NLL with coupled tasks clamped to gold.
    /// Exact: every term is a linear-chain likelihood over augmented unaries.
    /// Gradients cover heads, couplings, and (through both the emission rows
    /// and the weighting factors) the shared featurizer.
    pub fn loss_and_grad(
        &self,
        sentence: &MultiTaskSentence,
    ) -> Result<(f64, FactorialGradients), ModelError> {
        let j_count = self.num_tasks();
        if sentence.gold.len() != j_count {
            return Err(ModelError::TaskCountMismatch {
                expected: j_count,
                found: sentence.gold.len(),
            });
        }
        let weighted = self.variant != CouplingVariant::Plain;
        let features = self.featurizer.featurize(&sentence.tokens);
        let emissions = self.emissions(&features)?;
        let t_len = sentence.len();
        let mut grads = self.zero_gradients();
        let mut d_emissions: Vec<Array2<f64>> = emissions
            .iter()
            .map(|e| Array2::zeros(e.raw_dim()))
            .collect();
        let mut loss = 0.0;

        for j in 0..j_count {
            let aug = &emissions[j]
                + &self.coupling_unaries_from_scores(&emissions, j, &sentence.gold)?;
            let sg = chain::nll_from_scores(&aug, &self.heads[j], &sentence.gold[j])?;
            loss += sg.loss;
            grads.heads[j].b = sg.d_b;
            grads.heads[j].start = sg.d_start;
            grads.heads[j].stop = sg.d_stop;

            let k = emissions[j].ncols();
            for jh in self.coupled_tasks(j) {
                let seq = &sentence.gold[jh];
                for t in 0..t_len {
                    let y_jh = seq[t];
                    let w = self.pair_weight(&emissions, jh, t, y_jh);
                    let mut d_weight = 0.0;
                    for y in 0..k {
                        let ds = sg.d_scores[[t, y]];
                        let delta = w * ds;
                        if j < jh {
                            grads.couplings[self.pair_slot(j, jh)][[y_jh, y]] += delta;
                        } else {
                            grads.couplings[self.pair_slot(jh, j)][[y, y_jh]] += delta;
                        }
                        if weighted {
                            d_weight += ds * self.coupling_value(j, jh, y_jh, y);
                        }
                    }
                    // The weighting factor is task jh's emission score at its
                    // gold label, so its gradient flows back there.
                    if weighted {
                        d_emissions[jh][[t, y_jh]] += d_weight;
                    }
                }
            }
            d_emissions[j] += &sg.d_scores;
        }

        let mut d_features = Array2::zeros(features.raw_dim());
        for j in 0..j_count {
            grads.heads[j].a = d_emissions[j].t().dot(&features);
            d_features += &d_emissions[j].dot(&self.heads[j].a);
        }
        grads.featurizer = self
            .featurizer
            .featurize_backward(&sentence.tokens, &d_features)?;
        Ok((loss, grads))
    }

    /// Gold-clamped loss without gradient bookkeeping. Used for dev-loss
    /// monitoring; agrees with [`Self::loss_and_grad`] exactly.
    pub fn loss(&self, sentence: &MultiTaskSentence) -> Result<f64, ModelError> {
        let j_count = self.num_tasks();
        if sentence.gold.len() != j_count {
            return Err(ModelError::TaskCountMismatch {
                expected: j_count,
                found: sentence.gold.len(),
            });
        }
        let features = self.featurizer.featurize(&sentence.tokens);
        let emissions = self.emissions(&features)?;
        let mut loss = 0.0;
        for j in 0..j_count {
            let aug = &emissions[j]
                + &self.coupling_unaries_from_scores(&emissions, j, &sentence.gold)?;
            loss += chain::log_partition(&aug, &self.heads[j])
                - chain::score_path(&aug, &self.heads[j], &sentence.gold[j]);
        }
        Ok(loss)
    }

    /// Iterated conditional Viterbi over explicit emission scores, returning
    /// the assignment after initialization and after every sweep. The first
    /// entry is the coupling-free per-task decode; the last is the result.
    pub fn loopy_rounds_from_scores(
        &self,
        emissions: &[EmissionScores],
    ) -> Vec<Vec<Vec<LabelId>>> {
        assert!(
            self.variant != CouplingVariant::Cascaded,
            "cascaded models decode with cascade_decode"
        );
        let mut current: Vec<Vec<LabelId>> = emissions
            .iter()
            .zip(&self.heads)
            .map(|(e, h)| chain::viterbi(e, h).0)
            .collect();
        let mut rounds = vec![current.clone()];
        for _ in 0..self.bp.max_iterations {
            let mut changed = false;
            for j in 0..self.num_tasks() {
                let aug = &emissions[j]
                    + &self
                        .coupling_unaries_from_scores(emissions, j, &current)
                        .expect("current assignment covers every task");
                let (path, _) = chain::viterbi(&aug, &self.heads[j]);
                if path != current[j] {
                    changed = true;
                    current[j] = path;
                }
            }
            rounds.push(current.clone());
            if !changed {
                break;
            }
        }
        rounds
    }

    /// Joint decode by iterated conditional Viterbi sweeps (plain and
    /// weighted variants). Deterministic; stops after a sweep that changes
    /// nothing or after `bp.max_iterations` sweeps.
    pub fn loopy_decode(&self, tokens: &[String]) -> Vec<Vec<LabelId>> {
        let features = self.featurizer.featurize(tokens);
        let emissions = self.emissions(&features).expect("heads match featurizer");
        self.loopy_rounds_from_scores(&emissions)
            .pop()
            .expect("at least the initial round")
    }

    /// One exact pass in task order over explicit emission scores: task j is
    /// decoded with its unaries augmented by the already-decoded tasks.
    pub fn cascade_decode_from_scores(
        &self,
        emissions: &[EmissionScores],
    ) -> Vec<Vec<LabelId>> {
        assert!(
            self.variant == CouplingVariant::Cascaded,
            "cascade decoding requires the cascaded variant"
        );
        let mut decoded: Vec<Vec<LabelId>> = Vec::with_capacity(self.num_tasks());
        for j in 0..self.num_tasks() {
            let mut labels = decoded.clone();
            labels.resize(self.num_tasks(), Vec::new());
            let aug = &emissions[j]
                + &self
                    .coupling_unaries_from_scores(emissions, j, &labels)
                    .expect("earlier tasks are decoded");
            decoded.push(chain::viterbi(&aug, &self.heads[j]).0);
        }
        decoded
    }

    /// Cascade decode from raw tokens.
    pub fn cascade_decode(&self, tokens: &[String]) -> Vec<Vec<LabelId>> {
        let features = self.featurizer.featurize(tokens);
        let emissions = self.emissions(&features).expect("heads match featurizer");
        self.cascade_decode_from_scores(&emissions)
    }

    /// Decode with the strategy the variant calls for.
    pub fn predict(&self, tokens: &[String]) -> Vec<Vec<LabelId>> {
        match self.variant {
            CouplingVariant::Cascaded => self.cascade_decode(tokens),
            _ => self.loopy_decode(tokens),
        }
    }

    /// Unnormalized joint score of a full assignment under plain coupling:
    /// per-task chain scores plus each pair's coupling counted once.
    pub fn joint_score_from_scores(
        &self,
        emissions: &[EmissionScores],
        assignment: &[Vec<LabelId>],
    ) -> f64 {
        assert!(
            self.variant == CouplingVariant::Plain,
            "joint score is defined for the plain variant"
        );
        let mut total = 0.0;
        for j in 0..self.num_tasks() {
            total += chain::score_path(&emissions[j], &self.heads[j], &assignment[j]);
        }
        for pair in &self.couplings {
            for t in 0..assignment[pair.low].len() {
                total += pair.c[[assignment[pair.high][t], assignment[pair.low][t]]];
            }
        }
        total
    }

    /// Joint score from raw tokens.
    pub fn joint_score(&self, tokens: &[String], assignment: &[Vec<LabelId>]) -> f64 {
        let features = self.featurizer.featurize(tokens);
        let emissions = self.emissions(&features).expect("heads match featurizer");
        self.joint_score_from_scores(&emissions, assignment)
    }
}

impl FlatParams for FactorialModel {
    fn to_flat(&self) -> Vec<f64> {
        let mut out = self.featurizer.params.to_flat();
        for h in &self.heads {
            out.extend(h.to_flat());
        }
        for p in &self.couplings {
            out.extend(p.c.iter());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = self.featurizer.params.to_flat().len();
        self.featurizer.params.assign_flat(&flat[..offset]);
        for h in &mut self.heads {
            let n = h.to_flat().len();
            h.assign_flat(&flat[offset..offset + n]);
            offset += n;
        }
        for p in &mut self.couplings {
            for slot in p.c.iter_mut() {
                *slot = flat[offset];
                offset += 1;
            }
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }
}

impl FlatParams for FactorialGradients {
    fn to_flat(&self) -> Vec<f64> {
        let mut out = self.featurizer.to_flat();
        for h in &self.heads {
            out.extend(h.to_flat());
        }
        for c in &self.couplings {
            out.extend(c.iter());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = self.featurizer.to_flat().len();
        self.featurizer.assign_flat(&flat[..offset]);
        for h in &mut self.heads {
            let n = h.to_flat().len();
            h.assign_flat(&flat[offset..offset + n]);
            offset += n;
        }
        for c in &mut self.couplings {
            for slot in c.iter_mut() {
                *slot = flat[offset];
                offset += 1;
            }
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;
    use crate::math::{central_difference, max_rel_error};
    use crate::oracle;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn small_featurizer(seed: u64) -> Featurizer {
        Featurizer::new(
            FeatureConfig {
                embedding_dim: 3,
                char_ngram_orders: vec![2],
                hash_buckets: 11,
                window: 1,
                hidden_dim: 4,
                num_layers: 1,
                seed,
            },
            toks(&["the", "cat", "sat", "mat"]),
        )
    }

    /// Model whose featurizer is irrelevant, for score-level tests.
    fn score_model(ks: &[usize], variant: CouplingVariant) -> FactorialModel {
        let f = Featurizer::new(
            FeatureConfig {
                embedding_dim: 1,
                char_ngram_orders: vec![2],
                hash_buckets: 2,
                window: 0,
                hidden_dim: 1,
                num_layers: 1,
                seed: 0,
            },
            toks(&["a"]),
        );
        FactorialModel::new(f, ks, variant, BpConfig::default())
    }

    fn randomize<M: FlatParams>(m: &mut M, rng: &mut ChaCha8Rng, scale: f64) {
        let flat: Vec<f64> = m
            .to_flat()
            .iter()
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        m.assign_flat(&flat);
    }

    fn fill_random(c: &mut Array2<f64>, rng: &mut ChaCha8Rng, scale: f64) {
        for v in c.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }

    fn sentence(tokens: &[&str], gold: Vec<Vec<usize>>) -> MultiTaskSentence {
        MultiTaskSentence {
            tokens: toks(tokens),
            gold,
        }
    }

    #[test]
    fn zero_couplings_reduce_to_multihead() {
        for variant in [
            CouplingVariant::Plain,
            CouplingVariant::Weighted,
            CouplingVariant::Cascaded,
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut mh = MultiHeadModel::new(small_featurizer(1), &[2, 3]);
            randomize(&mut mh, &mut rng, 0.4);
            let fac = FactorialModel::from_multihead(mh.clone(), variant, BpConfig::default());

            let sent = sentence(&["the", "cat", "sat"], vec![vec![0, 1, 0], vec![2, 0, 1]]);
            let (mh_loss, mh_grads) = mh.loss_and_grad(&sent).unwrap();
            let (fac_loss, fac_grads) = fac.loss_and_grad(&sent).unwrap();
            assert!((mh_loss - fac_loss).abs() < 1e-12);
            let a = mh_grads.to_flat();
            let b = fac_grads.to_flat();
            // The factorial flat layout appends coupling gradients.
            assert!(a
                .iter()
                .zip(&b)
                .all(|(x, y)| (x - y).abs() < 1e-12));
            if variant != CouplingVariant::Cascaded {
                assert_eq!(fac.loopy_decode(&sent.tokens), mh.predict(&sent.tokens));
            } else {
                assert_eq!(fac.cascade_decode(&sent.tokens), mh.predict(&sent.tokens));
            }
        }
    }

    #[test]
    fn plain_coupling_row_lookup() {
        let mut model = score_model(&[2, 2], CouplingVariant::Plain);
        model.couplings[0].c =
            Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let emissions = vec![Array2::zeros((1, 2)), Array2::zeros((1, 2))];
        // Task 1's label is 1, so task 0 receives row [3, 4].
        let add = model
            .coupling_unaries_from_scores(&emissions, 0, &[vec![], vec![1]])
            .unwrap();
        assert_eq!(add[[0, 0]], 3.0);
        assert_eq!(add[[0, 1]], 4.0);
        // Task 0's label is 1, so task 1 reads the transposed column [2, 4].
        let add = model
            .coupling_unaries_from_scores(&emissions, 1, &[vec![1], vec![]])
            .unwrap();
        assert_eq!(add[[0, 0]], 2.0);
        assert_eq!(add[[0, 1]], 4.0);
    }

    #[test]
    fn zero_couplings_add_nothing_for_every_variant() {
        for variant in [
            CouplingVariant::Plain,
            CouplingVariant::Weighted,
            CouplingVariant::Cascaded,
        ] {
            let model = score_model(&[2, 3], variant);
            let emissions = vec![
                Array2::from_elem((2, 2), 0.7),
                Array2::from_elem((2, 3), -0.3),
            ];
            let add = model
                .coupling_unaries_from_scores(&emissions, 1, &[vec![1, 0], vec![2, 2]])
                .unwrap();
            assert!(add.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn weighted_zero_emission_gates_out_coupling() {
        let mut model = score_model(&[2, 2], CouplingVariant::Weighted);
        model.couplings[0].c = Array2::from_elem((2, 2), 5.0);
        // Task 1's emission score at its label is zero at t=0, nonzero at t=1.
        let emissions = vec![
            Array2::zeros((2, 2)),
            Array2::from_shape_vec((2, 2), vec![0.0, 0.3, 0.5, 0.0]).unwrap(),
        ];
        let add = model
            .coupling_unaries_from_scores(&emissions, 0, &[vec![], vec![0, 0]])
            .unwrap();
        assert_eq!(add[[0, 0]], 0.0);
        assert_eq!(add[[0, 1]], 0.0);
        assert_eq!(add[[1, 0]], 0.5 * 5.0);
    }

    #[test]
    fn missing_coupled_labels_is_reported() {
        let model = score_model(&[2, 2], CouplingVariant::Plain);
        let emissions = vec![Array2::zeros((2, 2)), Array2::zeros((2, 2))];
        let err = model
            .coupling_unaries_from_scores(&emissions, 0, &[vec![], vec![1]])
            .unwrap_err();
        assert!(matches!(
            err,
            ModelError::MissingCoupledLabels { task: 1, expected: 2, found: 1 }
        ));
    }

    #[test]
    fn shared_storage_serves_both_views() {
        let mut model = score_model(&[2, 3], CouplingVariant::Plain);
        let emissions = vec![Array2::zeros((1, 2)), Array2::zeros((1, 3))];
        let before_low = model
            .coupling_unaries_from_scores(&emissions, 0, &[vec![], vec![2]])
            .unwrap();
        let before_high = model
            .coupling_unaries_from_scores(&emissions, 1, &[vec![1], vec![]])
            .unwrap();
        // One shared entry: task 1 label 2 with task 0 label 1.
        model.couplings[0].c[[2, 1]] += 0.9;
        let after_low = model
            .coupling_unaries_from_scores(&emissions, 0, &[vec![], vec![2]])
            .unwrap();
        let after_high = model
            .coupling_unaries_from_scores(&emissions, 1, &[vec![1], vec![]])
            .unwrap();
        assert!((after_low[[0, 1]] - before_low[[0, 1]] - 0.9).abs() < 1e-15);
        assert!((after_high[[0, 2]] - before_high[[0, 2]] - 0.9).abs() < 1e-15);
        assert_eq!(after_low[[0, 0]], before_low[[0, 0]]);
        assert_eq!(after_high[[0, 0]], before_high[[0, 0]]);
    }

    #[test]
    fn single_coupling_entry_matches_hand_computation() {
        // Everything zero except one plain coupling entry g, one token, two
        // tasks with K=2, gold (0, 1). Each conditional normalizes over two
        // states, one scoring g and the other 0, with the gold state at g:
        // per-task NLL = ln(1 + e^g) - g.
        let g = 0.7;
        let mut model = score_model(&[2, 2], CouplingVariant::Plain);
        let n = model.to_flat().len();
        model.assign_flat(&vec![0.0; n]);
        model.couplings[0].c[[1, 0]] = g;
        let sent = sentence(&["a"], vec![vec![0], vec![1]]);
        let (loss, _) = model.loss_and_grad(&sent).unwrap();
        let expected = 2.0 * ((1.0 + g.exp()).ln() - g);
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_central_differences_for_every_variant() {
        for (seed, variant) in [
            (11, CouplingVariant::Plain),
            (12, CouplingVariant::Weighted),
            (13, CouplingVariant::Cascaded),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = FactorialModel::new(
                small_featurizer(seed),
                &[2, 3],
                variant,
                BpConfig::default(),
            );
            randomize(&mut model, &mut rng, 0.3);
            let sent = sentence(&["the", "cat", "dog"], vec![vec![0, 1, 1], vec![2, 0, 1]]);
            let (_, grads) = model.loss_and_grad(&sent).unwrap();
            let analytic = grads.to_flat();
            let numeric = central_difference(
                &mut model,
                |m| m.loss_and_grad(&sent).unwrap().0,
                1e-4,
            );
            assert!(
                max_rel_error(&analytic, &numeric) <= 1e-4,
                "variant {variant:?}"
            );
        }
    }

    #[test]
    fn gradient_free_loss_agrees_for_every_variant() {
        for (seed, variant) in [
            (31, CouplingVariant::Plain),
            (32, CouplingVariant::Weighted),
            (33, CouplingVariant::Cascaded),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = FactorialModel::new(
                small_featurizer(seed),
                &[2, 3],
                variant,
                BpConfig::default(),
            );
            randomize(&mut model, &mut rng, 0.3);
            let sent = sentence(&["the", "cat", "dog"], vec![vec![0, 1, 1], vec![2, 0, 1]]);
            let (loss, _) = model.loss_and_grad(&sent).unwrap();
            assert!((model.loss(&sent).unwrap() - loss).abs() < 1e-12);
        }
    }

    #[test]
    fn loopy_finds_joint_argmax_on_diagonal_coupling() {
        let mut model = score_model(&[2, 2], CouplingVariant::Plain);
        model.couplings[0].c = Array2::from_shape_vec((2, 2), vec![5.0, 0.0, 0.0, 5.0]).unwrap();
        // Emissions weakly disagree: task 0 prefers 0, task 1 prefers 1.
        let emissions = vec![
            Array2::from_shape_vec((1, 2), vec![0.1, 0.0]).unwrap(),
            Array2::from_shape_vec((1, 2), vec![0.0, 0.4]).unwrap(),
        ];
        let rounds = model.loopy_rounds_from_scores(&emissions);
        let decoded = rounds.last().unwrap().clone();
        let product = oracle::crossproduct_from_scores(&model, &emissions);
        let (best, _) = product.viterbi_assignment();
        assert_eq!(decoded, best);
        assert_eq!(decoded, vec![vec![1], vec![1]]);
    }

    #[test]
    fn plain_loopy_score_is_monotone_and_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            let t_len = rng.gen_range(1..=4);
            let ks = [rng.gen_range(2..=3), rng.gen_range(2..=3)];
            let mut model = score_model(&ks, CouplingVariant::Plain);
            for h in &mut model.heads {
                randomize(h, &mut rng, 1.0);
            }
            fill_random(&mut model.couplings[0].c, &mut rng, 1.0);
            let emissions: Vec<EmissionScores> = ks
                .iter()
                .map(|&k| Array2::from_shape_fn((t_len, k), |_| rng.gen_range(-1.5..1.5)))
                .collect();
            let rounds = model.loopy_rounds_from_scores(&emissions);
            assert!(rounds.len() <= model.bp.max_iterations + 1);
            let scores: Vec<f64> = rounds
                .iter()
                .map(|a| model.joint_score_from_scores(&emissions, a))
                .collect();
            for pair in scores.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9, "scores {scores:?}");
            }
        }
    }

    #[test]
    fn cascade_first_task_ignores_everything_downstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut model = FactorialModel::new(
            small_featurizer(31),
            &[2, 3],
            CouplingVariant::Cascaded,
            BpConfig::default(),
        );
        randomize(&mut model, &mut rng, 0.5);
        let tokens = toks(&["the", "mat", "cat"]);
        let before = model.cascade_decode(&tokens);
        randomize(&mut model.heads[1], &mut rng, 2.0);
        fill_random(&mut model.couplings[0].c, &mut rng, 2.0);
        let after = model.cascade_decode(&tokens);
        assert_eq!(before[0], after[0]);
        // Second task generally changes, proving the direction is one-way.
        assert_eq!(after[0], {
            let features = model.featurizer.featurize(&tokens);
            let scores = model.heads[0].emissions(&features).unwrap();
            chain::viterbi(&scores, &model.heads[0]).0
        });
    }

    #[test]
    fn cascade_matches_staged_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..10 {
            let mut model = score_model(&[3, 2], CouplingVariant::Cascaded);
            for h in &mut model.heads {
                randomize(h, &mut rng, 1.0);
            }
            fill_random(&mut model.couplings[0].c, &mut rng, 1.0);
            let emissions: Vec<EmissionScores> = [3, 2]
                .iter()
                .map(|&k| Array2::from_shape_fn((2, k), |_| rng.gen_range(-1.5..1.5)))
                .collect();
            let decoded = model.cascade_decode_from_scores(&emissions);

            let (stage1, _) = oracle::brute_force_argmax(&emissions[0], &model.heads[0]);
            let labels = vec![stage1.clone(), Vec::new()];
            let aug = &emissions[1]
                + &model
                    .coupling_unaries_from_scores(&emissions, 1, &labels)
                    .unwrap();
            let (stage2, _) = oracle::brute_force_argmax(&aug, &model.heads[1]);
            assert_eq!(decoded, vec![stage1, stage2]);
        }
    }

    #[test]
    fn joint_score_reduces_and_matches_product_chain() {
        // All parameters zero: every assignment scores zero.
        let model = score_model(&[2, 2], CouplingVariant::Plain);
        let emissions = vec![Array2::zeros((2, 2)), Array2::zeros((2, 2))];
        assert_eq!(
            model.joint_score_from_scores(&emissions, &[vec![0, 1], vec![1, 0]]),
            0.0
        );

        // One task: the joint score is the chain path score.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut single = score_model(&[3], CouplingVariant::Plain);
        randomize(&mut single.heads[0], &mut rng, 1.0);
        let e = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        let path = vec![2, 0, 1];
        assert!(
            (single.joint_score_from_scores(&[e.clone()], &[path.clone()])
                - chain::score_path(&e, &single.heads[0], &path))
                .abs()
                < 1e-12
        );

        // Two tasks: agrees with scoring the product-space chain.
        let mut model = score_model(&[2, 3], CouplingVariant::Plain);
        for h in &mut model.heads {
            randomize(h, &mut rng, 1.0);
        }
        fill_random(&mut model.couplings[0].c, &mut rng, 1.0);
        let emissions: Vec<EmissionScores> = [2, 3]
            .iter()
            .map(|&k| Array2::from_shape_fn((3, k), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let product = oracle::crossproduct_from_scores(&model, &emissions);
        for _ in 0..10 {
            let assignment = vec![
                (0..3).map(|_| rng.gen_range(0..2)).collect::<Vec<_>>(),
                (0..3).map(|_| rng.gen_range(0..3)).collect::<Vec<_>>(),
            ];
            let states = product.encode_states(&assignment);
            let direct = model.joint_score_from_scores(&emissions, &assignment);
            let via_product = chain::score_path(&product.scores, &product.head, &states);
            assert!((direct - via_product).abs() < 1e-10);
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut model = FactorialModel::new(
            small_featurizer(51),
            &[2, 3],
            CouplingVariant::Weighted,
            BpConfig::default(),
        );
        randomize(&mut model, &mut rng, 0.7);
        let flat = model.to_flat();
        let mut copy = FactorialModel::new(
            small_featurizer(51),
            &[2, 3],
            CouplingVariant::Weighted,
            BpConfig::default(),
        );
        copy.assign_flat(&flat);
        assert_eq!(copy.to_flat(), flat);
    }
}
